"""CPU inference engine for a mobile-scale vision-language model."""

from .bench import LatencyReport, Workload, flop_count, measure, report_emit
from .decoder import (MOBILELLAMA_1_4B, MOBILELLAMA_2_7B, TOY_DECODER, DecoderConfig, DecoderWeights, KvCache,
                      count_parameters, decoder_forward)
from .errors import MvlmError
from .pipeline import GenerationParams, GenerationResult, Model, build_vlm, generate, model_from_weights
from .projector import (ProjectorSpec, from_text, ldp_spec, mlp_spec, project, projector_param_count,
                        table8_spec)
from .quantize import QuantizedTensor, dequantize, quantize, quantized_matmul
from .tokenizer import Tokenizer, detokenize, tokenize
from .vision import CLIP_VIT_L14_336, TOY_VISION, VisionConfig, encode_image, rir_config
from .weights import ModelConfig, ModelWeights, init_random, load, save

__version__ = "0.1.0"
