from .dice_focal import as_target, combined_loss, dice_loss, focal_term, loss_for_stage, loss_name  # noqa: F401
from .models import LossConfig, LossName  # noqa: F401
