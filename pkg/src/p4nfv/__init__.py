"""Compose modular P4 network functions into per-switch programs and run
them on a simulated switch under an NFV-style lifecycle orchestrator."""

__version__ = "0.1.0"

from .composer import ComposedProgram, compose, qualify_table_name, render_pseudo_p4
from .descriptor import Member, NsDescriptor, Principal
from .dsl import P4FunctionDef, parse_function_def, resolve_field, validate_function
from .errors import P4nfvError
from .orchestrator import Orchestrator
from .repo import FunctionRepo
from .state import StateStore
from .switch import Frame, Switch, Verdict

__all__ = [
    "ComposedProgram",
    "Frame",
    "FunctionRepo",
    "Member",
    "NsDescriptor",
    "Orchestrator",
    "P4FunctionDef",
    "P4nfvError",
    "Principal",
    "StateStore",
    "Switch",
    "Verdict",
    "compose",
    "parse_function_def",
    "qualify_table_name",
    "render_pseudo_p4",
    "resolve_field",
    "validate_function",
]
