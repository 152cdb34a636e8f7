import yaml
from functools import lru_cache
from pathlib import Path

PROMPTS_DIR = Path(__file__).parent.parent.parent / "prompts"


@lru_cache(maxsize=None)
def load_prompt(name: str) -> dict:
    with open(PROMPTS_DIR / name, "r") as f:
        return yaml.safe_load(f)


def build_messages(name: str, **values) -> list[dict]:
    """System prompt verbatim, user_template filled with str.format."""
    prompt = load_prompt(name)
    return [
        {"role": "system", "content": prompt["system_prompt"]},
        {"role": "user", "content": prompt["user_template"].format(**values)},
    ]
