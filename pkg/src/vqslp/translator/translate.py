from __future__ import annotations

from ..errors import ArtifactMismatchError, EmptyTranslationError
from ..pose_data import PoseSequence
from ..stitcher import StitchConfig, apply
from ..tokenizer import TokenSequence, detokenize, token_boundaries
from .train import TranslatorArtifact


def check_compatible(model: TranslatorArtifact, artifact):
    if model.n_tokens != artifact.n_tokens:
        raise ArtifactMismatchError(
            f"translator predicts {model.n_tokens} tokens but the codebook has {artifact.n_tokens}")
    if model.codebook_fingerprint and model.codebook_fingerprint != artifact.fingerprint:
        raise ArtifactMismatchError(
            f"translator was trained on codebook {model.codebook_fingerprint}, got {artifact.fingerprint}")


def translate_tokens(model: TranslatorArtifact, words, beam_size: int | None = None,
                     length_penalty: float | None = None, max_len: int | None = None) -> TokenSequence:
    d = model.beam(words, beam_size, length_penalty, max_len)
    return TokenSequence(tuple(d.ids), 0)


def translate_to_pose(model: TranslatorArtifact, artifact, words, stitch: bool = True,
                      stitch_config: StitchConfig | None = None, beam_size: int | None = None,
                      length_penalty: float | None = None, max_len: int | None = None,
                      fps: float = 25.0, source_id: str = "") -> PoseSequence:
    """Beam search, detokenize, then optionally stitch the token boundaries."""
    check_compatible(model, artifact)
    tokens = translate_tokens(model, words, beam_size, length_penalty, max_len)
    if not tokens.tokens:
        raise EmptyTranslationError(f"translation of {words!r} produced no tokens")
    tokens = TokenSequence(tokens.tokens, len(tokens) * artifact.window, 0, source_id)
    pose = detokenize(tokens, artifact, fps, source_id)
    if stitch:
        pose = stitch_pose(pose, artifact.window, stitch_config)
    return pose


def stitch_pose(pose: PoseSequence, window: int, config: StitchConfig | None = None) -> PoseSequence:
    """Stitch a detokenized sequence at every window boundary.

    Without a config the blend width is the default 2, narrowed for short
    windows so neighbouring blends never overlap.
    """
    if config is None:
        config = StitchConfig(blend_width=max(1, min(StitchConfig.blend_width, (window - 1) // 2)))
    n_tokens = len(pose) // window
    return apply(pose, token_boundaries(n_tokens, window), config)
