from .layers import (
    CONV_SPEC,
    ContractError,
    Conv1d,
    Conv1dStack,
    Flatten,
    Linear,
    Mlp,
    ReLU,
    Sequential,
    Sigmoid,
    Tanh,
    conv_out_len,
    sigmoid,
)
from .nets import ACTION_DIM, HISTORY, LATENT_DIM, STATE_DIM, PolicyNets
from .optim import Adam, Sgd
