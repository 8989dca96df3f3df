import glob
import importlib
import traceback
from pathlib import Path
from types import ModuleType
from typing import Type

from driftguard.template import PipelineTemplate
from driftguard.utility import logger


def load_pipeline_classes() -> dict[str, Type[PipelineTemplate]]:
    """Load pipeline classes from the files of this folder"""
    classes: dict[str, Type[PipelineTemplate]] = {}

    path: Path = Path(__file__).parent
    for suffix in ["py", "pyd", "so"]:
        pathname: str = str(path.joinpath(f"*.{suffix}"))
        for filepath in sorted(glob.glob(pathname)):
            stem: str = Path(filepath).stem
            if stem.startswith("__"):
                continue
            _load_pipeline_classes_from_module(f"{__name__}.{stem}", classes)

    return classes


def _load_pipeline_classes_from_module(module_name: str, classes: dict) -> None:
    """Load pipeline classes from specific file"""
    try:
        module: ModuleType = importlib.import_module(module_name)

        for name in dir(module):
            value = getattr(module, name)
            if (isinstance(value, type) and issubclass(value, PipelineTemplate) and value is not PipelineTemplate):
                classes[value.__name__] = value
    except Exception:
        msg: str = f"Load pipeline file {module_name} failed due to exception: \n{traceback.format_exc()}"
        logger.error(msg)
