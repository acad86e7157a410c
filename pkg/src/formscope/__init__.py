"""formscope: detect Meta Pixel / Google Tag installations and whether they
are configured to collect PII from web forms."""

__version__ = "0.1.0"
