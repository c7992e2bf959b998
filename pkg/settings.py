#settings.py
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()
from decouple import config

BASE_DIR = Path(__file__).resolve().parent

CONFIG_DIR = BASE_DIR / "configs"

# default --out when the flag is not given
OUTPUT_DIR = config("COMPASS_LAB_OUT", default="runs")

DEFAULT_SEED = config("COMPASS_LAB_SEED", default=0, cast=int)
DEFAULT_JOBS = config("COMPASS_LAB_JOBS", default=1, cast=int)
LOG_LEVEL = config("COMPASS_LAB_LOG_LEVEL", default="INFO")

QUANTIZATION = {
    "MIN_EXPERT_COUNT": config("COMPASS_LAB_QUANT_TAU", default=128, cast=int),
    "SMOOTH_ALPHA": config("COMPASS_LAB_SMOOTH_ALPHA", default=0.5, cast=float),
    "FP8_MAX": 448.0,
}

TOKENIZER = {
    "BYTE_VOCAB": 256,
    "BOS": 256,
    "EOS": 257,
    "EOT": 258,
    "PAD": 259,
    "VOCAB_SIZE": 260,
}

# fixed float format keeps metric CSVs byte-identical across runs
CSV_FLOAT_FORMAT = "%.8g"
