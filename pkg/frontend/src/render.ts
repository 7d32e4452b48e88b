// Canvas drawing of the four synchronized skeleton panels.

import { projectAllViews } from "./projection.js";
import { MotionPayload } from "./types.js";

export function drawViews(
  canvases: HTMLCanvasElement[],
  motion: MotionPayload,
  frameIndex: number,
) {
  const panels = projectAllViews(
    motion,
    frameIndex,
    canvases[0].width,
    canvases[0].height,
  );
  panels.forEach((panel, i) => {
    const canvas = canvases[i];
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    ctx.fillStyle = "#11151c";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#7fd4ff";
    ctx.lineWidth = 2;
    ctx.lineCap = "round";
    for (const s of panel.segments) {
      ctx.beginPath();
      ctx.moveTo(s.x1, s.y1);
      ctx.lineTo(s.x2, s.y2);
      ctx.stroke();
    }
    ctx.fillStyle = "#dce3ec";
    ctx.font = "12px sans-serif";
    ctx.fillText(panel.name, 8, 16);
  });
}

export class Playback {
  frame = 0;
  speed = 1.0;
  private last = 0;
  private acc = 0;
  private handle = 0;

  constructor(
    private motion: () => MotionPayload | null,
    private draw: (frame: number) => void,
  ) {}

  start() {
    this.last = performance.now();
    const tick = (now: number) => {
      const motion = this.motion();
      if (motion) {
        this.acc += ((now - this.last) / 1000) * motion.frame_rate * this.speed;
        const advance = Math.floor(this.acc);
        if (advance > 0) {
          this.acc -= advance;
          // Loops seamlessly: the frame after the last is frame 0.
          this.frame = (this.frame + advance) % motion.n_frames;
          this.draw(this.frame);
        }
      }
      this.last = now;
      this.handle = requestAnimationFrame(tick);
    };
    this.handle = requestAnimationFrame(tick);
  }

  reset() {
    this.frame = 0;
    this.acc = 0;
  }

  stop() {
    cancelAnimationFrame(this.handle);
  }
}
