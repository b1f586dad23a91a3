#define __global__ __attribute__((global))
#define __device__ __attribute__((device))
#define __host__ __attribute__((host))
#define __shared__ __attribute__((shared))
#define __launch_bounds__(x) __attribute__((launch_bounds(x)))
#define __forceinline__ __attribute__((always_inline))
#define __align__(n) __attribute__((aligned(n)))
#include "__clang_cuda_builtin_vars.h"
struct half { unsigned short x; };
__device__ float __half2float(half);
__device__ half __float2half_rn(float);
__device__ float fmaxf(float, float);
__device__ float expf(float);
__device__ float tanhf(float);
__device__ void __syncthreads();
