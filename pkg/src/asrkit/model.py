"""The assembled recognizer: frontend -> encoder -> {CTC branch, decoder}."""

import os
from dataclasses import dataclass

import numpy as np

from . import serialization, tensor as T
from .adapt import LanguageMask
from .beam import BeamConfig, BeamResult, joint_beam_search
from .ctc import ctc_loss
from .decoder import Decoder, DecoderConfig
from .encoder import Encoder, EncoderConfig, EncoderOutput
from .errors import ValidationError
from .nn import Module
from .ssl import AudioFeatures, Frontend, SslConfig
from .tensor import Tensor
from .vocab import Vocab, load_vocab, save_vocab

CTC_WEIGHT = 0.3
ATT_WEIGHT = 0.7
TAP_WEIGHT = 0.5


@dataclass(frozen=True)
class ModelConfig:
    frontend: SslConfig
    encoder: EncoderConfig
    decoder: DecoderConfig
    seed: int = 0

    def __post_init__(self):
        if self.encoder.input_dim != self.frontend.hidden_dim:
            raise ValidationError(
                "encoder input_dim must equal the frontend hidden_dim")

    def to_dict(self) -> dict:
        return {
            "frontend": self.frontend.to_dict(),
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(frontend=SslConfig.from_dict(payload["frontend"]),
                   encoder=EncoderConfig.from_dict(payload["encoder"]),
                   decoder=DecoderConfig.from_dict(payload["decoder"]),
                   seed=payload.get("seed", 0))


class AsrModel(Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocab):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.frontend = Frontend(cfg.frontend, seed=cfg.seed)
        self.encoder = Encoder(cfg.encoder, vocab.size, seed=cfg.seed)
        self.decoder = Decoder(cfg.decoder, vocab.size, seed=cfg.seed)

    # -- forward -------------------------------------------------------------

    def encode(self, feat: AudioFeatures,
               adaptation: LanguageMask | None = None) -> EncoderOutput:
        latent = self.frontend.forward_latent(T.constant(feat.frames))
        return self.encoder.encode(latent, adaptation=adaptation)

    def wrapped_target(self, text: str, language: str) -> np.ndarray:
        chars = self.vocab.encode_transcript(text, language)
        if not chars:
            raise ValidationError("empty transcript")
        return np.array([self.vocab.sos_id, self.vocab.lang_id(language)]
                        + chars + [self.vocab.eos_id], dtype=np.int64)

    def utterance_losses(self, feat: AudioFeatures, text: str,
                         language: str) -> dict[str, Tensor]:
        """Loss components for one utterance (no weighting applied)."""
        labels = np.asarray(self.vocab.encode_transcript(text, language),
                            dtype=np.int64)
        enc = self.encode(feat)
        out = {
            "ctc": ctc_loss(enc.final_log_posterior, labels),
            "att": self.decoder.teacher_forced_loss(
                enc, self.wrapped_target(text, language)),
        }
        taps = [ctc_loss(tap, labels) for _, tap in enc.tap_log_posteriors]
        if taps:
            acc = taps[0]
            for t in taps[1:]:
                acc = acc + t
            out["taps"] = acc * (1.0 / len(taps))
        return out

    # -- inference -------------------------------------------------------------

    def transcribe(self, feat: AudioFeatures, cfg: BeamConfig,
                   language: str | None = None,
                   adaptation: LanguageMask | None = None
                   ) -> list[BeamResult]:
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                enc = self.encode(feat, adaptation=adaptation)

                def decode_fn(prefix):
                    return self.decoder.decode_step(enc, np.asarray(prefix))

                results = joint_beam_search(
                    enc.final_log_posterior.data.astype(np.float64),
                    decode_fn, self.vocab, cfg, language=language)
        finally:
            self.train(was_training)
        return results

    def result_text(self, result: BeamResult) -> str:
        return self.vocab.decode_ids(result.tokens)


def save_model(directory: str, model: AsrModel,
               train_state: dict | None = None,
               extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    arrays = model.named_state()
    if extra_arrays:
        arrays.update(extra_arrays)
    serialization.save_arrays(directory, arrays)
    serialization.save_json(directory, serialization.CONFIG_FILE,
                            model.cfg.to_dict())
    save_vocab(os.path.join(directory, "vocab.json"), model.vocab)
    if train_state is not None:
        serialization.save_json(directory, serialization.STATE_FILE,
                                train_state)


def load_model(directory: str) -> tuple[AsrModel, dict[str, np.ndarray]]:
    """Rebuild a model from a checkpoint directory.

    Returns (model, leftover arrays) where the leftovers are entries that
    belong to the trainer (optimizer moments), keyed by their full names.
    """
    cfg = ModelConfig.from_dict(
        serialization.load_json(directory, serialization.CONFIG_FILE))
    vocab = load_vocab(os.path.join(directory, "vocab.json"))
    model = AsrModel(cfg, vocab)
    arrays = serialization.load_arrays(directory)
    model.load_state(arrays)
    own = set(model.named_state())
    leftovers = {k: v for k, v in arrays.items() if k not in own}
    return model, leftovers


def load_train_state(directory: str) -> dict | None:
    path = os.path.join(directory, serialization.STATE_FILE)
    if not os.path.isfile(path):
        return None
    return serialization.load_json(directory, serialization.STATE_FILE)
