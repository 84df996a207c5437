"""Link-level 802.11n MIMO-OFDM simulator for in-vivo channels."""

__version__ = "0.1.0"
