"""RBF-VAE voxel features and 3D group convolutions for point segmentation."""

__version__ = "0.1.0"
