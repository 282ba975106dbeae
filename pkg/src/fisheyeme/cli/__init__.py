"""
fisheyeme 命令行子命令
"""
