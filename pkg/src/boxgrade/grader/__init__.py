from .checkpoint import Checkpoint
from .encoders import ClipAdapter, EncoderPair, ToyEncoderPair, build_encoders
from .inference import Decision, GradeResult, Grader, decide, grade
from .loss import build_target_matrix, contrastive_loss
from .training import TrainConfig, TrainingDiverged, train
