from .packaging import OutputPackager, package_inference

__all__ = ['OutputPackager', 'package_inference']
