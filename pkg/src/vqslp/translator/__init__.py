from .decoding import Decoded, Hypothesis, beam_search, greedy_decode, length_penalty
from .model import TranslatorConfig, TranslatorModel
from .train import TranslatorArtifact, teacher_forced_accuracy, train_translator
from .translate import check_compatible, stitch_pose, translate_to_pose, translate_tokens
from .vocab import BOS, EOS, PAD, UNK, TargetVocab, Vocab, split_words
