"""
fisheyeme 命令行工具入口点

退出码: 0 成功，1 用法或配置错误，2 数据错误（文件读写、标定表、尺寸不一致等）
"""
import argparse
import sys

from fisheyeme import config
from fisheyeme.cli import commands
from fisheyeme.errors import ConfigError, FisheyeError
from fisheyeme.logger_module import setup_logger


class CliParser(argparse.ArgumentParser):
    """用法错误返回退出码 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def main(argv=None):
    """执行命令行功能

    返回:
        int: 状态码，0 表示成功，1 表示用法或配置错误，2 表示数据错误
    """
    parser = CliParser(prog="fisheyeme", description="fisheyeme - 鱼眼视频运动估计与帧率上变换工具")
    commands.setup_parser(parser)
    args = parser.parse_args(argv)

    if not hasattr(args, 'func'):
        parser.print_help()
        return 1

    logger, _ = setup_logger(app_name=config.LOG_APP_NAME, console_output=True,
                             log_to_file=not args.no_log_file,
                             level="DEBUG" if args.verbose else "INFO")
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"[#error] ❌ 配置错误: {e}")
        return 1
    except (FisheyeError, OSError) as e:
        logger.error(f"[#error] ❌ {type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
