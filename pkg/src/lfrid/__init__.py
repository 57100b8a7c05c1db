"""Nonlinear LFR system identification initialised from the best linear approximation.

Modules
-------
signals     excitation generators and the sampled-data record type
lti         state-space models, simulation and BLA estimation
nllfr       the NL-LFR model, its simulation and exact output Jacobian
initialize  embedding of a BLA into an NL-LFR with an open feedback loop
lm          Levenberg-Marquardt in the SVD-truncated parameter frame
boucwen     hysteretic benchmark simulator
metrics     RMSE, test protocols and plot-data tables
pipeline    configured end-to-end experiment runner
cli         command-line entry point
"""

__version__ = "0.1.0"
