"""Shared rasterization constants (both kernel backends read these)."""

# Diagonal regularization (pixel^2) added to every projected 2D covariance
# before inversion; keeps the inverse well conditioned for thin splats.
COV_REG = 0.3

# Per-splat opacity contribution is clamped here so no single splat can
# fully saturate a pixel.
ALPHA_CLAMP = 0.99

# Contributions below this opacity are skipped entirely.
MIN_ALPHA = 1.0 / 255.0

# Pixels whose remaining transmittance drops below this stop compositing.
T_MIN = 1e-4

# Splat footprint radius in standard deviations; also the cull test.
CULL_SIGMA = 3.0
