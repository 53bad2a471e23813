/** Rolling tick-indexed series for the Diff and Score strip charts. */

export interface PlotPoint {
  tick: number;
  value: number;
}

export class RollingSeries {
  private points: PlotPoint[] = [];

  constructor(readonly window = 2000) {
    if (window < 1) throw new Error("window must be positive");
  }

  push(tick: number, value: number): void {
    if (!Number.isFinite(value)) return;
    this.points.push({ tick, value });
    const cutoff = tick - this.window + 1;
    // points arrive in tick order, so trimming from the front suffices
    let drop = 0;
    while (drop < this.points.length && this.points[drop]!.tick < cutoff) drop++;
    if (drop > 0) this.points = this.points.slice(drop);
    if (this.points.length > this.window) {
      this.points = this.points.slice(this.points.length - this.window);
    }
  }

  data(): readonly PlotPoint[] {
    return this.points;
  }

  get length(): number {
    return this.points.length;
  }

  range(): { min: number; max: number } {
    if (this.points.length === 0) return { min: 0, max: 1 };
    let min = Infinity;
    let max = -Infinity;
    for (const p of this.points) {
      min = Math.min(min, p.value);
      max = Math.max(max, p.value);
    }
    if (min === max) {
      min -= 0.5;
      max += 0.5;
    }
    return { min, max };
  }

  clear(): void {
    this.points = [];
  }
}
