"""Joint spatial/temporal learners for imputing and forecasting multivariate series."""

__version__ = "0.1.0"
