"""Filtered-multitone spread-spectrum modem with noncontiguous subcarriers."""

__version__ = "0.1.0"

from .waveform import (SubcarrierPlan, WaveformConfig, build_contiguous_plan, build_prototype, optimize_gains,
                       place_subcarriers)
from .framing import build_alphabet, build_preamble, encode, decode_symbols
from .tx import SampleStream, modulate_direct, modulate_fc
from .rx import acquire_timing, build_nmf, build_remap, demod_direct, demod_fc, rake_detect
from .link import LinkParams, Receiver, loopback, transmit

__all__ = [
    "SubcarrierPlan", "WaveformConfig", "build_contiguous_plan", "build_prototype", "optimize_gains",
    "place_subcarriers", "build_alphabet", "build_preamble", "encode", "decode_symbols", "SampleStream",
    "modulate_direct", "modulate_fc", "acquire_timing", "build_nmf", "build_remap", "demod_direct", "demod_fc",
    "rake_detect", "LinkParams", "Receiver", "loopback", "transmit",
]
