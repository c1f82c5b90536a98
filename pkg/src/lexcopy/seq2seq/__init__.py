from .layers import MultiHeadAttention, causal_mask, key_padding_mask, sinusoidal_positions
from .model import ConstrainedTransformer, DecoderOutput, EncoderStates, ModelConfig, segment_ids
from .vocab import RESERVED, Vocabulary, read_corpus, write_corpus
from .decoding import beam_search, decode, greedy_decode
