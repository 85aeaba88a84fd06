"""Frame-semantic tagging with adversarial domain training, from scratch on numpy."""
from .corpus import (Corpus, FrameAnnotation, FrameElement, FrameLexicon, JointLabel, Sample, Span, Token,
                     build_label_space, read_corpus, write_corpus)
from .decode import DecoderConfig, decode_sample
from .metrics import EvalReport, PRPoint, score_arg_id_soft, score_frame_id, sweep_delta
from .optim import lambda_schedule, sgd_step
from .synth import SynthConfig, generate
from .tagger import NetConfig, Tagger, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Corpus", "DecoderConfig", "EvalReport", "FrameAnnotation", "FrameElement", "FrameLexicon",
    "JointLabel", "NetConfig", "PRPoint", "Sample", "Span", "SynthConfig", "Tagger", "Token",
    "TrainConfig", "build_label_space", "decode_sample", "generate", "lambda_schedule", "read_corpus",
    "score_arg_id_soft", "score_frame_id", "sgd_step", "sweep_delta", "train", "write_corpus",
]
