"""Graph-based spatiotemporal EEG seizure analysis.

Subpackages cover the full pipeline: synthetic recording generation and
container IO (ingest), frequency-domain clip extraction (preprocess), EEG
graph construction (graph), a minimal reverse-mode autodiff engine
(autodiff), graph-convolutional recurrent models (model), training loops
(training), evaluation metrics (metrics), and occlusion-based saliency with
coverage/localization scoring (interpret).
"""

__version__ = "0.1.0"
