"""Ear-conditioned binaural speaker separation.

Modules
-------
:mod:`earsep.dsp`
   STFT analysis/synthesis and waveform utilities.
:mod:`earsep.scenes`
   Room acoustics, scene rendering and dataset synthesis.
:mod:`earsep.model`
   The ear-conditioned separation network.
:mod:`earsep.metrics`, :mod:`earsep.report`
   SI-SDR, STOI, evaluation and reporting.
:mod:`earsep.training`
   Training loop with plateau-based learning-rate halving and early stopping.
:mod:`earsep.cli`
   The ``earsep`` command.
"""
from importlib import metadata

__version__ = metadata.version(__name__)
