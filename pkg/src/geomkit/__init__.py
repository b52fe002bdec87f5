"""geomkit: pose-manifold learning with geometry-preserving latent maps
and free-elastica interpolation.

Subpackages by role:

- ``dataset``   procedural splat-rendered rotation datasets and file formats
- ``numerics``  PCA, pairwise distances, Gram projections, correlation loss
- ``netcore``   minimal reverse-mode autodiff, MLPs, optimizers, checkpoints
- ``tangent``   tangent-space estimation and pushforward through a mapper
- ``embed``     geometry-preserving encoder/decoder training
- ``elastica``  free elastic curves between directed latent points
- ``evaluate``  path interpolation, SE metrics, baselines, denoising
- ``config``    schema-validated run configs and presets
- ``cli``       command-line front end
- ``kernels``   compiled hot loops with a pure-numpy fallback
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401  (error taxonomy is part of the public API)
