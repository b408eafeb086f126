"""skyflow: ground-based sky-imaging pipeline for solar irradiance forecasting.

The package turns raw 16-bit infrared / visible sky frames and pyranometer
series into detrended clear-sky-index signals and regularized cloud-motion
vector fields, and ships a Gaussian-process Bayesian-optimization harness
that tunes the motion estimators against simulated wind fields.

Submodules
----------
solar        sun position, time corrections, sunrise/sunset
irradiance   clear-sky GSI model, pyranometer bias corrections, CSI
frames       dataset I/O, frame averaging, multi-exposure fusion
radiometry   IR intensity to temperature, lapse rate, cloud base
atmosphere   scatter/direct radiation models, parameter regressors, detrending
skystate     sky-condition SVC, persistent classification, window model
perspective  pixel-to-atmosphere geometric transforms
motion       dense optical flow and PIV estimators, vector regularization
tuner        GP regression, expected improvement, benchmark harness
cli          `skyflow` command-line pipeline stages
"""

__version__ = "0.1.0"
