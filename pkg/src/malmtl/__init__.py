"""Malware binaries as RGB images, classified by a multi-task CNN.

Subpackages: ``containers`` (PE/ELF/Mach-O/APK parsing), ``codec`` (byte
stream <-> image, BMP and PNG), ``nn`` (numpy CNN engine). Modules:
``mtl`` (shared-trunk network), ``cyclegan`` (domain translation for
augmentation), ``metrics``, ``synth`` (synthetic corpus), ``pipeline``.
"""

__version__ = "0.1.0"
