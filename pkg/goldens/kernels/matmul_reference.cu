#include <cuda_fp16.h>

typedef struct __align__(16) { half x[8]; } half8;
typedef struct __align__(8) { half x[4]; } half4;

__device__ const unsigned char hmma_load_a_row_swizzled_offsets[32][1][2] = {{{0, 0}}, {{1, 0}}, {{2, 0}}, {{3, 0}}, {{8, 0}}, {{9, 0}}, {{10, 0}}, {{11, 0}}, {{0, 0}}, {{1, 0}}, {{2, 0}}, {{3, 0}}, {{8, 0}}, {{9, 0}}, {{10, 0}}, {{11, 0}}, {{4, 0}}, {{5, 0}}, {{6, 0}}, {{7, 0}}, {{12, 0}}, {{13, 0}}, {{14, 0}}, {{15, 0}}, {{4, 0}}, {{5, 0}}, {{6, 0}}, {{7, 0}}, {{12, 0}}, {{13, 0}}, {{14, 0}}, {{15, 0}}};
__device__ __forceinline__ void hmma_load_a_row_swizzled(half *frag, const half *tile, int row0, int col0, int ld) {
  int lane = threadIdx.x % 32;
  #pragma unroll
  for (int j = 0; j < 1; ++j) {
    int row = row0 + hmma_load_a_row_swizzled_offsets[lane][j][0];
    int col = col0 + hmma_load_a_row_swizzled_offsets[lane][j][1];
    int slot = row * (ld / 8) + ((col / 8) ^ (((((row) >> 0) & 1) << 0) | ((((row) >> 1) & 1) << 1) | ((((row) >> 3) & 1) << 2)));
    *(half8 *)&frag[8 * j] = *(const half8 *)&tile[8 * slot + col % 8];
  }
}

__device__ const unsigned char hmma_load_b_col_swizzled_offsets[32][1][2] = {{{0, 0}}, {{1, 0}}, {{2, 0}}, {{3, 0}}, {{0, 0}}, {{1, 0}}, {{2, 0}}, {{3, 0}}, {{8, 0}}, {{9, 0}}, {{10, 0}}, {{11, 0}}, {{8, 0}}, {{9, 0}}, {{10, 0}}, {{11, 0}}, {{4, 0}}, {{5, 0}}, {{6, 0}}, {{7, 0}}, {{4, 0}}, {{5, 0}}, {{6, 0}}, {{7, 0}}, {{12, 0}}, {{13, 0}}, {{14, 0}}, {{15, 0}}, {{12, 0}}, {{13, 0}}, {{14, 0}}, {{15, 0}}};
__device__ __forceinline__ void hmma_load_b_col_swizzled(half *frag, const half *tile, int row0, int col0, int ld) {
  int lane = threadIdx.x % 32;
  #pragma unroll
  for (int j = 0; j < 1; ++j) {
    int row = row0 + hmma_load_b_col_swizzled_offsets[lane][j][0];
    int col = col0 + hmma_load_b_col_swizzled_offsets[lane][j][1];
    int slot = row * (ld / 8) + ((col / 8) ^ (((((row) >> 0) & 1) << 0) | ((((row) >> 1) & 1) << 1) | ((((row) >> 2) & 1) << 2)));
    *(half8 *)&frag[8 * j] = *(const half8 *)&tile[8 * slot + col % 8];
  }
}

// 16x16x8 macro-MMA: each warp-wide m8n8k4 issue runs on all four quad-pairs;
// quad-pair q owns the 8x8 accumulator quadrant (8*(q%2), 8*(q/2)) of each 16x16 sub-tile.
__device__ __forceinline__ void hmma_row_col(float *d, const half *a, const half *b, const float *c) {
  for (int e = 0; e < 8; ++e) d[e] = c[e];
  { // sub-tile (0,0) k-step 0
    const unsigned *ua = (const unsigned *)(a + 0); const unsigned *ub = (const unsigned *)(b + 0); float *acc = d + 0;
    asm volatile("mma.sync.aligned.m8n8k4.row.col.f32.f16.f16.f32 {%0,%1,%2,%3,%4,%5,%6,%7}, {%8,%9}, {%10,%11}, {%0,%1,%2,%3,%4,%5,%6,%7};"
      : "+f"(acc[0]), "+f"(acc[1]), "+f"(acc[2]), "+f"(acc[3]), "+f"(acc[4]), "+f"(acc[5]), "+f"(acc[6]), "+f"(acc[7])
      : "r"(ua[0]), "r"(ua[1]), "r"(ub[0]), "r"(ub[1]));
  }
  { // sub-tile (0,0) k-step 1
    const unsigned *ua = (const unsigned *)(a + 4); const unsigned *ub = (const unsigned *)(b + 4); float *acc = d + 0;
    asm volatile("mma.sync.aligned.m8n8k4.row.col.f32.f16.f16.f32 {%0,%1,%2,%3,%4,%5,%6,%7}, {%8,%9}, {%10,%11}, {%0,%1,%2,%3,%4,%5,%6,%7};"
      : "+f"(acc[0]), "+f"(acc[1]), "+f"(acc[2]), "+f"(acc[3]), "+f"(acc[4]), "+f"(acc[5]), "+f"(acc[6]), "+f"(acc[7])
      : "r"(ua[0]), "r"(ua[1]), "r"(ub[0]), "r"(ub[1]));
  }
}

__device__ __forceinline__ void hmma_store_global_after_reordering(half *dst, const float *acc, int ld, half *scratch) {
  int linearId = threadIdx.x + blockDim.x * threadIdx.y + blockDim.x * blockDim.y * threadIdx.z;
  int lane = linearId % 32, warp = linearId / 32;
  int q = (lane >> 2) & 3, l = lane & 3, hi = lane >> 4;
  int unit = 4 * q + (l & 1) + 16 * hi;
  #define SCRATCH_SLOT(t) (((t) & 24) | (((t) + 2 * (((t) >> 3) & 1)) & 7))
  #pragma unroll
  for (int s = 0; s < 1; ++s) {
    const float *c = acc + 8 * s;
    half4 lo = {__float2half_rn(c[0]), __float2half_rn(c[1]), __float2half_rn(c[4]), __float2half_rn(c[5])};
    half4 up = {__float2half_rn(c[2]), __float2half_rn(c[3]), __float2half_rn(c[6]), __float2half_rn(c[7])};
    half *mine = scratch + 256 * warp;
    *(half4 *)&mine[8 * SCRATCH_SLOT(unit) + 4 * (l >> 1)] = lo;
    *(half4 *)&mine[8 * SCRATCH_SLOT(unit + 2) + 4 * (l >> 1)] = up;
    __syncthreads();
    half8 v;
    if (threadIdx.z == 0) { // split-K partials summed in ascending slice order
      float sum[8] = {};
      for (int z = 0; z < 2; ++z) {
        half8 part = *(const half8 *)&scratch[256 * (warp + 4 * z) + 8 * SCRATCH_SLOT(lane)];
        for (int e = 0; e < 8; ++e) sum[e] += __half2float(part.x[e]);
      }
      for (int e = 0; e < 8; ++e) v.x[e] = __float2half_rn(sum[e]);
    }
    half8 o = {v.x[0], v.x[1], v.x[4], v.x[5], v.x[2], v.x[3], v.x[6], v.x[7]}; // columns 0..7 of this thread's row
    if (threadIdx.z == 0) *(half8 *)&dst[(8 * (q & 1) + l + 4 * hi + 0) * ld + 8 * (q >> 1) + 0] = o;
    __syncthreads();
  }
  #undef SCRATCH_SLOT
}

__device__ __forceinline__ void hmma_store_shared_a_row_swizzled(half *tile, const half *src0, int pass) {
  int linearId = threadIdx.x + blockDim.x * threadIdx.y + blockDim.x * blockDim.y * threadIdx.z;
  int v = pass * 256 + linearId;
  int row = v / 8;
  int slot = row * 8 + ((v % 8) ^ (((((row) >> 0) & 1) << 0) | ((((row) >> 1) & 1) << 1) | ((((row) >> 3) & 1) << 2)));
  *(half8 *)&tile[8 * slot] = *(const half8 *)src0;
}

__device__ __forceinline__ void hmma_store_shared_b_col_swizzled(half *tile, const half *src0, int pass) {
  int linearId = threadIdx.x + blockDim.x * threadIdx.y + blockDim.x * blockDim.y * threadIdx.z;
  int v = pass * 256 + linearId;
  int row = v / 8;
  int slot = row * 8 + ((v % 8) ^ (((((row) >> 0) & 1) << 0) | ((((row) >> 1) & 1) << 1) | ((((row) >> 2) & 1) << 2)));
  *(half8 *)&tile[8 * slot] = *(const half8 *)src0;
}

extern "C" __global__ void __launch_bounds__(256) kern0(int M, int N, int K, const half * __restrict__ A, int ldA, const half * __restrict__ B, int ldB, half * __restrict__ C, int ldC) {
  __shared__ __align__(16) half shared_A[8192];
  __shared__ __align__(16) half shared_B[8192];
  __shared__ __align__(16) half sharedBuffer[2048];
  half hmma_A[4][1][8];
  half hmma_B[4][1][8];
  half private_A[4][8];
  half private_B[4][8];
  float acc_C[4][4][8] = {};
  int linearId = threadIdx.x + blockDim.x * threadIdx.y + blockDim.x * blockDim.y * threadIdx.z;
  int warpIdx_x = threadIdx.x / 32;
  int warpIdx_y = threadIdx.y;
  int warpIdx_z = threadIdx.z;
  for (int c2 = -1; c2 < K / 64; c2 += 1) { // k-tile loop (prefetch one tile ahead)
    if (K >= 64 * c2 + 128) { // prefetch the next tile from global memory
      #pragma unroll
      for (int c5 = 0; c5 <= 3; c5 += 1) {
        *(half8 *)&private_A[(c5)][0] = *(const half8 *)&A[(128 * blockIdx.y + 32 * c5 + linearId / 8) * ldA + (64 * (c2 + 1) + 8 * (linearId % 8))]; // stage A tile in registers
        *(half8 *)&private_B[(c5)][0] = *(const half8 *)&B[(128 * blockIdx.x + 32 * c5 + linearId / 8) * ldB + (64 * (c2 + 1) + 8 * (linearId % 8))]; // stage B tile in registers
      }
    }
    if (c2 >= 0) { // overlap compute with the prefetch of the next tile
      #pragma unroll
      for (int c8 = 0; c8 <= 3; c8 += 1) {
        #pragma unroll
        for (int c11 = 0; c11 <= 3; c11 += 1) {
          hmma_load_a_row_swizzled(&hmma_A[(c11)][0][0], &shared_A[0], (64 * warpIdx_y + 16 * c11), (32 * warpIdx_z + 8 * c8), 64); // swizzled shared tile to register fragments
          hmma_load_b_col_swizzled(&hmma_B[(c11)][0][0], &shared_B[0], (64 * warpIdx_x + 16 * c11), (32 * warpIdx_z + 8 * c8), 64); // swizzled shared tile to register fragments
        }
        #pragma unroll
        for (int c9 = 0; c9 <= 63; c9 += 16) {
          #pragma unroll
          for (int c10 = 0; c10 <= 63; c10 += 16) {
            hmma_row_col(&acc_C[(c9 / 16)][(c10 / 16)][0], &hmma_A[(c9 / 16)][0][0], &hmma_B[(c10 / 16)][0][0], &acc_C[(c9 / 16)][(c10 / 16)][0]); // macro-MMA on register fragments
          }
        }
      }
    }
    if (K >= 64 * c2 + 128) { // publish the prefetched tile
      __syncthreads();
      #pragma unroll
      for (int c5 = 0; c5 <= 3; c5 += 1) {
        hmma_store_shared_a_row_swizzled(&shared_A[0], &private_A[(c5)][0], c5); // registers to swizzled shared tile
        hmma_store_shared_b_col_swizzled(&shared_B[0], &private_B[(c5)][0], c5); // registers to swizzled shared tile
      }
      __syncthreads();
    }
  }
  if (K >= 64) { // after the last k-tile
    #pragma unroll
    for (int c4 = 0; c4 <= 3; c4 += 1) {
      #pragma unroll
      for (int c5 = 0; c5 <= 3; c5 += 1) {
        hmma_store_global_after_reordering(&C[(128 * blockIdx.y + 64 * warpIdx_y + 16 * c4) * ldC + (128 * blockIdx.x + 64 * warpIdx_x + 16 * c5)], &acc_C[(c4)][(c5)][0], ldC, &sharedBuffer[0]); // reorder through shared memory and store to global
      }
    }
  }
}
