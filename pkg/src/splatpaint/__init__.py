"""splatpaint: CPU differentiable appearance engine for frozen gaussian splats.

Trains a diffuse/specular color decomposition over a multiresolution hash
grid with multi-view tile batches, then propagates single-view recolor
edits through a cloned diffuse head and a learned soft 3D segmentation.
"""

__version__ = "0.1.0"
