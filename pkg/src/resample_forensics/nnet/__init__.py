"""Hand-derived neural network stack (float64, numpy only)."""
from .core import (
    binary_cross_entropy_logits,
    cross_entropy_loss,
    gradient_check,
    logistic,
    predict_labels,
    softmax,
)
from .lstm import (
    LstmCellParams,
    LstmModel,
    dihedral,
    init_lstm,
    lstm_cell_step,
    lstm_forward,
    lstm_loss,
    lstm_loss_and_grads,
    lstm_predict,
    train_lstm_classifier,
    zero_lstm,
)
from .mlp import (
    MlpModel,
    init_mlp,
    mlp_forward,
    mlp_loss,
    mlp_loss_and_grads,
    mlp_predict,
    train_mlp,
    zero_mlp,
)
from .optim import Adam, TrainConfig, clip_by_global_norm
from .qda import QdaModel, qda_fit, qda_score, qda_scores
from .serialize import load_model, model_bytes, save_model
