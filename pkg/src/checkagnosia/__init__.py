"""Quantized min-sum decoding of CSS quantum LDPC codes with check-agnosia post-processing."""
