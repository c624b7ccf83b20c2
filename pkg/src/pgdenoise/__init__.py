"""Self-supervised Poisson-Gaussian denoising."""
