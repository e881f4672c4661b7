from .model import (
    GPT,
    Condition,
    GPTConfig,
    POS_ROPE1D,
    POS_TRIPE,
    paper_scale_gpt,
    read_embedding_file,
    write_embedding_file,
)
from .sample import GPTSampler, StepLogits, sample_tokens
from .train import GPTTrainReport, train_gpt
