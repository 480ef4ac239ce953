import inspect
import shutil
import typing as tp
from dataclasses import dataclass
from pathlib import Path
from types import ModuleType

import jinja2
import yaml

import previewmpc

SUBMODULES = [
    "tree_object",
    "errors",
    "solvers.lp",
    "solvers.qp",
    "polytope",
    "model",
    "config",
    "synthesis",
    "ocp",
    "controllers",
    "harness",
    "cli",
]


@dataclass
class Structure:
    name_path: str
    module_path: str
    members: tp.List[str]


def public_members(module: ModuleType) -> tp.List[str]:
    return sorted(
        name
        for name, obj in inspect.getmembers(module)
        if not name.startswith("_")
        and (inspect.isclass(obj) or inspect.isfunction(obj))
        and obj.__module__ == module.__name__
    )


def getinfo() -> tp.Dict[str, Structure]:
    outputs = {}

    for name in SUBMODULES:
        module = previewmpc
        for part in name.split("."):
            module = getattr(module, part)

        outputs[name] = Structure(
            name_path=f"previewmpc.{name}",
            module_path=module.__name__,
            members=public_members(module),
        )

    return outputs


docs_info = getinfo()

# populate mkdocs
with open("mkdocs.yml", "r") as f:
    docs = yaml.safe_load(f)


[api_reference_index] = [
    index for index, section in enumerate(docs["nav"]) if "API Reference" in section
]

api_reference = {
    name: "api/" + name.replace(".", "/") + ".md" for name in docs_info
}

docs["nav"][api_reference_index] = {"API Reference": api_reference}

with open("mkdocs.yml", "w") as f:
    yaml.safe_dump(docs, f, default_flow_style=False, sort_keys=False)


template = """
# {{name_path}}

::: {{module_path}}
    selection:
        {%- if members %}
        members:
        {%- for member in members %}
            - {{member}}
        {%- endfor %}
        {% endif %}
"""

api_path = Path("docs/api")
shutil.rmtree(api_path, ignore_errors=True)

for name, structure in docs_info.items():
    filepath: Path = api_path / (name.replace(".", "/") + ".md")
    markdown = jinja2.Template(template).render(
        name_path=structure.name_path,
        module_path=structure.module_path,
        members=structure.members,
    )

    filepath.parent.mkdir(parents=True, exist_ok=True)
    filepath.write_text(markdown)
