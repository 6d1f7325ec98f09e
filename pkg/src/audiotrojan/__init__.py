"""Sound-element backdoor triggers for speech-command datasets.

Two trigger families are provided: pitch boosting with a masked high-pitch
tone (:mod:`audiotrojan.pbsm`) and timbre conversion toward voiceprints
picked by farthest-first selection (:mod:`audiotrojan.vsvc`). The
:mod:`audiotrojan.poisoner` module turns either into poisoned training sets
and triggered test sets; :mod:`audiotrojan.metrics` scores predictions.
"""

__version__ = "0.1.0"
