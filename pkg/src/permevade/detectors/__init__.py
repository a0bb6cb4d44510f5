from .zoo import (
    ALGORITHMS,
    DEFAULT_HYPERPARAMETERS,
    CVResult,
    DetectorModel,
    DetectorSpec,
    ImportanceRanking,
    Metrics,
    accuracy,
    cross_validate,
    evaluate,
    feature_importance,
    load_model,
    predict_benign_prob,
    save_model,
    select_top_k,
    train_model,
)
