"""
程序全局配置模块

默认值对应参考采集系统：焦距 1.8mm、视场角 185°、传感器 5.2mm、1088×1088 分辨率，
以及运动估计测试设置：块大小 16、搜索范围 64、1/8 像素精度。
"""
import os

# 日志
LOG_APP_NAME = "fisheyeme"

# 相机几何
DEFAULT_FOCAL_MM = 1.8
DEFAULT_FOV_DEG = 185.0
DEFAULT_SENSOR_MM = 5.2
DEFAULT_WIDTH_PX = 1088
DEFAULT_HEIGHT_PX = 1088

# 运动估计
ALLOWED_BLOCK_SIZES = (8, 16, 32, 64)
DEFAULT_BLOCK_SIZE = 16
DEFAULT_SEARCH_RANGE = 64
DEFAULT_PRECISION = 8
DEFAULT_METRIC = "ssd"
DEFAULT_METHOD = "tme"
DEFAULT_MAX_WORKERS = os.cpu_count() or 4
# 每个候选块分片的最大元素数，限制单块搜索的内存占用
CANDIDATE_CHUNK_ELEMENTS = 1 << 20

# 帧率上变换
DEFAULT_ALPHA = 0.5
DEFAULT_HYBRID_FOV_DEG = 170.0
CWM_CENTER_WEIGHT = 7
CWM_TAPS_PER_ARM = 3

# 标定
DEFAULT_LUT_STEP_DEG = 0.01
CALIBRATION_HEADER = "theta_deg,r_mm"

# 合成序列
MAX_SYNTH_FOV_DEG = 175.0
DEFAULT_TEXTURE_SIGMA = 3.0

# 质量评估
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PIXEL_MAX = 255.0

# 输出文件
MOTION_CSV_HEADER = "bx,by,dx,dy,cost,skipped,method,block,range,precision"
TRUTH_CSV_HEADER = "pair_index,truth_dx,truth_dy"
METRICS_CSV_HEADER = "frame,psnr_db,ssim,masked_pixels"
MOTION_FILE = "motion.csv"
COMPENSATED_FILE = "compensated.png"
TRUTH_FILE = "truth.csv"
FRAME_NAME_PATTERN = "frame_{index:04d}.png"
