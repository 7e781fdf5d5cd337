"""hydemic: hyperspectral mineral classification with a from-scratch 1D CNN.

Modules
-------
spectra   reflectance spectra, label codec, library loading and synthesis
scene     synthetic hyperspectral cubes, noise injection, HCUB1 files
nn        layer kernels with forward/backward passes and gradient checking
model     the CNN architecture, pixel-wise prediction, HDM1 model files
training  AdamW, cosine learning-rate schedule, training loop
metrics   confusion matrix, MCC, TPR, confidence histograms
"""

__version__ = "0.1.0"

from .model import ModelConfig, build_model, forward, load_model, predict_pixelwise, save_model
from .scene import (HyperCube, RegionSpec, SceneSpec, build_scene, copper_scene_spec,
                    generate_scene, inject_noise)
from .spectra import (LabelCodec, SpectralLibrary, Spectrum, generate_synthetic_library,
                      load_spectral_library, write_library)
from .training import TrainConfig, train

__all__ = [
    "ModelConfig", "build_model", "forward", "load_model", "predict_pixelwise", "save_model",
    "HyperCube", "RegionSpec", "SceneSpec", "build_scene", "copper_scene_spec", "generate_scene",
    "inject_noise", "LabelCodec", "SpectralLibrary", "Spectrum", "generate_synthetic_library",
    "load_spectral_library", "write_library", "TrainConfig", "train",
]
