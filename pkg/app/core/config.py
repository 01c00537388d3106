import json
import logging
from pathlib import Path
from typing import Optional, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from app.core.errors import ConfigParseError
from app.core.settings import settings
from app.models.models import PipelineConfig
from app.utils.image_io import write_bytes_atomic

# Configure logging
logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)
PathLike = Union[str, Path]


def configure_logging(level: Optional[str] = None) -> None:
    """Install the single stderr handler used by every command."""
    level = (level or settings.LOG_LEVEL).upper()
    logging.basicConfig(level=level, format=settings.LOG_FORMAT)
    logging.getLogger().setLevel(level)


def load_json_model(path: PathLike, model: Type[M]) -> M:
    """
    Parse a JSON file into a model.

    Args:
        path: JSON file
        model: Pydantic model class to validate against

    Returns:
        Validated model instance
    """
    path = Path(path)
    try:
        return model.model_validate_json(path.read_bytes())
    except FileNotFoundError:
        logger.error(f"Error loading {model.__name__}: {path} not found")
        raise ConfigParseError(f"{path} not found")
    except ValidationError as e:
        logger.error(f"Error loading {model.__name__} from {path}: {str(e)}")
        raise ConfigParseError(f"invalid {model.__name__} in {path}: {e.error_count()} error(s)\n{str(e)}")


def load_pipeline_config(path: Optional[PathLike] = None) -> PipelineConfig:
    """Pipeline config from a file, or the defaults when no file is given."""
    if path is None:
        return PipelineConfig()
    config = load_json_model(path, PipelineConfig)
    logger.info(f"Loaded pipeline config from {path}")
    return config


def dump_model(model: BaseModel) -> bytes:
    """Indented JSON with a trailing newline; the byte form every command writes."""
    return (json.dumps(model.model_dump(mode="json"), indent=2) + "\n").encode("utf-8")


def save_model(path: PathLike, model: BaseModel) -> Path:
    path = Path(path)
    write_bytes_atomic(path, dump_model(model))
    return path
