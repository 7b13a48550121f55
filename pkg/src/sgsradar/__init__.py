"""Joint delay-Doppler estimation for OFDM passive radar via atomic-norm SDP and sGS-ADMM."""

__version__ = "0.1.0"
