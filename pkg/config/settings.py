import os
from dotenv import load_dotenv

load_dotenv()

# LLM provider (OpenAI-compatible chat completions)
LLM_ENDPOINT = os.getenv("LLM_ENDPOINT", "https://api.openai.com/v1/chat/completions")
LLM_MODEL = os.getenv("LLM_MODEL", "gpt-4.1-mini")
# Name of the environment variable that holds the key, never the key itself
LLM_API_KEY_ENV = os.getenv("LLM_API_KEY_ENV", "OPENAI_API_KEY")
LLM_TIMEOUT = float(os.getenv("LLM_TIMEOUT", "120"))
LLM_MAX_REPROMPTS = int(os.getenv("LLM_MAX_REPROMPTS", "2"))
LLM_TEMPERATURE = float(os.getenv("LLM_TEMPERATURE", "0"))
LLM_JSON_MODE = os.getenv("LLM_JSON_MODE", "true").lower() == "true"

# Requests against the service under test
REQUEST_TIMEOUT = float(os.getenv("REQUEST_TIMEOUT", "30"))
VERIFY_TLS = os.getenv("VERIFY_TLS", "true").lower() == "true"
SPEC_DOWNLOAD_TIMEOUT = int(os.getenv("SPEC_DOWNLOAD_TIMEOUT", "30"))

# Generation budgets
MAX_RETRIES_PER_STEP = int(os.getenv("MAX_RETRIES_PER_STEP", "3"))
MAX_SEQUENCE_LEN = int(os.getenv("MAX_SEQUENCE_LEN", "8"))
MAX_STRUCTURAL_SCENARIOS = int(os.getenv("MAX_STRUCTURAL_SCENARIOS", "10"))
MAX_FUNCTIONAL_SCENARIOS = int(os.getenv("MAX_FUNCTIONAL_SCENARIOS", "10"))
FLATTEN_MAX_PAIRS = int(os.getenv("FLATTEN_MAX_PAIRS", "2000"))
SUMMARY_BUDGET = int(os.getenv("SUMMARY_BUDGET", "6000"))

# Environment initialization scripts
INIT_SCRIPT_TIMEOUT = float(os.getenv("INIT_SCRIPT_TIMEOUT", "60"))

# Output
OUTPUT_DIR = os.getenv("OUTPUT_DIR", "restgen-workspace")

# Logging Configuration
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# Embedded fixture service
FIXTURE_DB_PATH = os.getenv("FIXTURE_DB_PATH", "fixture.db")
FIXTURE_DEFECTS = os.getenv("FIXTURE_DEFECTS", "")
