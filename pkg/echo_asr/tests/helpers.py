from echo_asr.models import ModelConfig
from echo_asr.transducer.model import preset_config


def tiny_config(preset: str = "rnnt-d", *, dim: int = 4, vocab: int = 3, feature_dim: int = 3,
                layers: int = 2, seed: int = 11, **kw) -> ModelConfig:
    """
    Крошечная модель для градиентных проверок.
    ESN плотные: у 4x4 матрицы с 80% нулей легко получить нильпотентную (радиус 0).
    """
    cfg = preset_config(preset, feature_dim=feature_dim, vocab_size=vocab, enc_dim=dim, dec_dim=dim,
                        joint_dim=dim, num_layers=layers, seed=seed, **kw)
    return cfg.model_copy(update={"esn_sparsity": 0.0})
