"""Desk-scale kinematic tabletop: task specs, rendering, scripted capture and replay."""
from .render import Renderer, render_cloud
from .scripts import script_actions, scripted_demo
from .tasks import CAMERA_BIRDSEYE, CAMERA_OBLIQUE, ObjectSpec, TaskSpec, down, load_task, task_names
from .world import Outcome, World, WorldState, execute_plan, write_trace

__all__ = [
    "CAMERA_BIRDSEYE", "CAMERA_OBLIQUE", "ObjectSpec", "Outcome", "Renderer", "TaskSpec", "World",
    "WorldState", "down", "execute_plan", "load_task", "render_cloud", "script_actions", "scripted_demo",
    "task_names", "write_trace",
]
