"""Singing voice conversion with an F0- and singer-conditioned VAW-GAN.

Submodules:

* ``features``   SVCF feature files, normalization, F0 statistics
* ``model``      encoder / decoder / critic and checkpoints
* ``training``   two-stage VAE then VAW-GAN training
* ``conversion`` feature-level conversion and vocoder hand-off
* ``evaluation`` mel-cepstra, DTW and MCD
* ``cli``        the ``vawsvc`` command line tool
"""

__version__ = "0.1.0"
