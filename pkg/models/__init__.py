#models/__init__.py
from .moe.transformer import MoETransformer
from .reward.reward_model import RewardModel
