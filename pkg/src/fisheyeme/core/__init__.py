"""
核心算法: 投影几何、帧、块匹配、帧率上变换、质量评估与合成序列
"""
