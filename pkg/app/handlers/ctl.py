"""Operator requests from robotctl; every handler answers with ctl_result"""
from app.services.protocol import (
    CtlGoalAdd, CtlGoalList, CtlGoalRemove, CtlMissionStart, CtlPlanCreate, CtlPlanList, CtlPlanShow,
    CtlRobotDeploy, CtlRobotList, CtlRobotRegister, CtlRobotRemove, CtlRun, CtlStatus, CtlTaskAdd,
    CtlWorldAdd, CtlWorldList, CtlWorldRemove, ok,
)
from app.utils.decorators import error_handler, log_action
from app.utils.router import Router

router = Router("ctl")


# ==================== ROBOTS ====================

@router.message("ctl_robot_register")
@error_handler
@log_action("robot_register")
async def robot_register(message: CtlRobotRegister, conn):
    return ok(await conn.app.register_robot(message.document))


@router.message("ctl_robot_list")
@error_handler
async def robot_list(message: CtlRobotList, conn):
    return ok(conn.app.list_robots())


@router.message("ctl_robot_remove")
@error_handler
@log_action("robot_remove")
async def robot_remove(message: CtlRobotRemove, conn):
    return ok(conn.app.remove_robot(message.name))


@router.message("ctl_robot_deploy")
@error_handler
async def robot_deploy(message: CtlRobotDeploy, conn):
    return ok(conn.app.deploy_command(message.name))


# ==================== WORLD ====================

@router.message("ctl_world_add")
@error_handler
@log_action("world_add")
async def world_add(message: CtlWorldAdd, conn):
    return ok(conn.app.add_statement(message.text))


@router.message("ctl_world_list")
@error_handler
async def world_list(message: CtlWorldList, conn):
    return ok(conn.app.list_statements())


@router.message("ctl_world_remove")
@error_handler
@log_action("world_remove")
async def world_remove(message: CtlWorldRemove, conn):
    return ok(conn.app.remove_statement(message.id))


# ==================== GOALS ====================

@router.message("ctl_goal_add")
@error_handler
@log_action("goal_add")
async def goal_add(message: CtlGoalAdd, conn):
    return ok(conn.app.add_goal(message.text))


@router.message("ctl_goal_list")
@error_handler
async def goal_list(message: CtlGoalList, conn):
    return ok(conn.app.list_goals())


@router.message("ctl_goal_remove")
@error_handler
@log_action("goal_remove")
async def goal_remove(message: CtlGoalRemove, conn):
    return ok(conn.app.remove_goal(message.id))


# ==================== PLANS / MISSIONS ====================

@router.message("ctl_plan_create")
@error_handler
@log_action("plan_create")
async def plan_create(message: CtlPlanCreate, conn):
    return ok(await conn.app.create_plan(message.planner, message.allocator))


@router.message("ctl_plan_show")
@error_handler
async def plan_show(message: CtlPlanShow, conn):
    return ok(conn.app.show_plan(message.id, message.format))


@router.message("ctl_plan_list")
@error_handler
async def plan_list(message: CtlPlanList, conn):
    return ok(conn.app.list_plans())


@router.message("ctl_task_add")
@error_handler
@log_action("task_add")
async def task_add(message: CtlTaskAdd, conn):
    task = await conn.app.add_task(message.plan, message.desc, message.after, message.before,
                                   robot=message.robot, task_id=message.id)
    return ok(task)


@router.message("ctl_run")
@error_handler
@log_action("run")
async def run(message: CtlRun, conn):
    return ok(conn.app.run(message.plan))


@router.message("ctl_mission_start")
@error_handler
@log_action("mission_start")
async def mission_start(message: CtlMissionStart, conn):
    return ok(conn.app.start_mission(message.planner, message.allocator))


@router.message("ctl_status")
@error_handler
async def status(message: CtlStatus, conn):
    return ok(conn.app.status(message.mission))
