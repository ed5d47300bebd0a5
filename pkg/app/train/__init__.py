from .cascade import cascade_predict, structure_with_image  # noqa: F401
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401
from .experiment import ComparisonResult, PhantomExperimentResult, run_comparison, run_phantom_experiment  # noqa: F401
from .finetune import finetune_full, finetune_kgpl, finetune_random_prompts, knowledge_block  # noqa: F401
from .loops import evaluate_model, evaluate_reports, fit, predicted_tissue_input, pretrain, stage_backbone, stage_inputs  # noqa: F401
from .models import Checkpoint, Stage, StageData, TrainConfig, TrainMode  # noqa: F401
from .schedule import build_optimizer, build_scheduler, lr_at  # noqa: F401
