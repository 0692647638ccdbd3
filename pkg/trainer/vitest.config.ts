import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // 3-D convolutions on the pure-JS backend are slow; training tests
    // (overfitting, full pipeline) legitimately take minutes
    testTimeout: 600_000,
    hookTimeout: 120_000,
    pool: "forks",
    silent: false,
  },
});
