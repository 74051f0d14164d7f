"""FMAP feature exporter bridging a pretrained ViT backbone to the splatting trainer."""

from .exporter import export, load_backbone, make_test_weights, write_fmap

__all__ = ["export", "load_backbone", "make_test_weights", "write_fmap"]
