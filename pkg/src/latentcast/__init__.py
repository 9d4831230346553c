"""Domain-generalizing probabilistic time series forecasting with
shared/specific latent factors learned by a conditional beta-VAE pair."""

__version__ = "0.1.0"
