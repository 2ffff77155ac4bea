# DMD-MPC planning, DeMoRL training and DeMo Layer guidance on analytic control tasks
__version__ = "0.1.0"
