"""Interfaces between the evaluation and training components.
"""
from zope.interface import Interface, Attribute, implementer
from zope.interface.verify import verifyClass

__all__ = [
    "ISeparator",
    "IValidator",
    "implementer",
    "verifyClass",
]


class ISeparator(Interface):
    """Anything that turns an 8-channel mixture into left/right ear estimates.

    `metrics.evaluate_dataset` only uses this interface, so the unprocessed
    baseline and a trained network are scored by the same code.
    """

    name = Attribute("Row label used in reports (e.g. 'Unprocessed').")

    def separate(mixture):
        """Return `(est_left, est_right)` single-channel Waveforms.

        Parameters
        ----------
        mixture : Waveform
           8-channel mixture.  Estimates have the same length and rate.
        """


class IValidator(Interface):
    """Scores the current model at the end of each training epoch."""

    def __call__(model, epoch):
        """Return the validation metric (mean SI-SDR in dB, higher is better)."""
