"""Audio augmentation for self-supervised (APC) speech pre-training at desk scale."""

__version__ = "0.1.0"

from .apc import ApcModel, ApcPretrainer, PretrainConfig, apc_loss, extract_repr, pretrain
from .audio_io import (AudioBuffer, FrameLabels, Manifest, ManifestEntry, SynthCorpusSpec,
                       generate_synth_corpus, load_manifest, read_wav, save_manifest, write_wav)
from .augment import AugmentationPlan, NoiseAugSpec, PitchAugSpec, expand_plan, mix_noise, pitch_shift
from .dsp import FeatureSequence, LogMelExtractor, MelConfig, StftConfig, log_mel, mel_filterbank, stft_magnitude
from .harness import (ExperimentSpec, RunReport, crossover_multiplier, report_deltas, report_scaling,
                      run_grid)
from .probe import EvalReport, FinetuneConfig, PhonemeProbe, ProbeModel, evaluate, finetune, predict

__all__ = [
    "ApcModel", "ApcPretrainer", "AudioBuffer", "AugmentationPlan", "EvalReport", "ExperimentSpec",
    "FeatureSequence", "FinetuneConfig", "FrameLabels", "LogMelExtractor", "Manifest", "ManifestEntry",
    "MelConfig", "NoiseAugSpec", "PhonemeProbe", "PitchAugSpec", "PretrainConfig", "ProbeModel",
    "RunReport", "StftConfig", "SynthCorpusSpec", "apc_loss", "crossover_multiplier", "evaluate",
    "expand_plan", "extract_repr", "finetune", "generate_synth_corpus", "load_manifest", "log_mel",
    "mel_filterbank", "mix_noise", "pitch_shift", "predict", "pretrain", "read_wav", "report_deltas",
    "report_scaling", "run_grid", "save_manifest", "stft_magnitude", "write_wav",
]
