/** Keyboard/pointer capture mapped to a smoothed action vector in [-1, 1]. */

export interface KeyBinding {
  positive: string[];
  negative: string[];
}

/** Axis 0: left/right (A/D or arrows); axis 1: down/up (S/W or arrows).
 * Tasks with more than two action dimensions repeat the two bindings with
 * bracket/semicolon pairs for the extra axes. */
export const DEFAULT_BINDINGS: KeyBinding[] = [
  { positive: ["KeyD", "ArrowRight"], negative: ["KeyA", "ArrowLeft"] },
  { positive: ["KeyW", "ArrowUp"], negative: ["KeyS", "ArrowDown"] },
  { positive: ["KeyE"], negative: ["KeyQ"] },
  { positive: ["KeyX"], negative: ["KeyZ"] },
];

export const clip = (x: number): number => Math.min(1, Math.max(-1, x));

/** Raw target from currently held keys: +1 / -1 per axis, opposing keys
 * cancel to zero. */
export function keysToTarget(held: ReadonlySet<string>, dims: number): number[] {
  const target: number[] = [];
  for (let i = 0; i < dims; i++) {
    const binding = DEFAULT_BINDINGS[i % DEFAULT_BINDINGS.length]!;
    const pos = binding.positive.some((k) => held.has(k)) ? 1 : 0;
    const neg = binding.negative.some((k) => held.has(k)) ? 1 : 0;
    target.push(pos - neg);
  }
  return target;
}

/** Pointer displacement from drag start, scaled and clipped; drives axes
 * 0 (x, rightward positive) and 1 (y, upward positive). */
export function pointerToTarget(
  dx: number,
  dy: number,
  dims: number,
  pixelsPerUnit = 80,
): number[] {
  const target = new Array<number>(dims).fill(0);
  if (dims > 0) target[0] = clip(dx / pixelsPerUnit);
  if (dims > 1) target[1] = clip(-dy / pixelsPerUnit);
  return target;
}

/** First-order low-pass y += (dt/tau) (u - y), time constant 0.1 s. */
export class InputSmoother {
  private value: number[];

  constructor(
    readonly dims: number,
    readonly tau = 0.1,
  ) {
    this.value = new Array<number>(dims).fill(0);
  }

  step(target: number[], dt: number): number[] {
    if (target.length !== this.dims) {
      throw new Error(`expected ${this.dims} axes, got ${target.length}`);
    }
    const alpha = Math.min(1, dt / this.tau);
    this.value = this.value.map((y, i) => clip(y + alpha * (clip(target[i]!) - y)));
    return [...this.value];
  }

  current(): number[] {
    return [...this.value];
  }

  reset(): void {
    this.value.fill(0);
  }
}

/** Tracks held keys and an optional pointer drag; pointer wins while active. */
export class InputCapture {
  private held = new Set<string>();
  private drag: { startX: number; startY: number; x: number; y: number } | null = null;
  readonly smoother: InputSmoother;

  constructor(readonly dims: number, tau = 0.1) {
    this.smoother = new InputSmoother(dims, tau);
  }

  keyDown(code: string): void {
    this.held.add(code);
  }

  keyUp(code: string): void {
    this.held.delete(code);
  }

  pointerDown(x: number, y: number): void {
    this.drag = { startX: x, startY: y, x, y };
  }

  pointerMove(x: number, y: number): void {
    if (this.drag) {
      this.drag.x = x;
      this.drag.y = y;
    }
  }

  pointerUp(): void {
    this.drag = null;
  }

  /** Smoothed action for one tick of length dt seconds. */
  sample(dt: number): number[] {
    const target = this.drag
      ? pointerToTarget(this.drag.x - this.drag.startX, this.drag.y - this.drag.startY, this.dims)
      : keysToTarget(this.held, this.dims);
    return this.smoother.step(target, dt);
  }
}
