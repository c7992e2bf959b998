#schemas/__init__.py
from .moe.schemas import MoEConfig, PretrainConfig
from .sft.schemas import SftConfig, SftRecord
