/** Canvas renderer for the bounded 2-D world.
 *
 * Draws the region polygons colored per proposition, the trajectory
 * polyline flown so far, the current uncertainty disc, and the vehicle
 * heading.  World coordinates are mapped into the canvas with a uniform
 * scale so the aspect ratio is preserved.
 */

import { Deployment, EnvironmentView } from "./types.js";

const REGION_COLORS: Record<string, string> = {
  u: "rgba(196, 64, 64, 0.55)", // unsafe set: always red
};
const PALETTE = [
  "rgba(70, 130, 180, 0.45)",
  "rgba(60, 160, 90, 0.45)",
  "rgba(200, 150, 40, 0.45)",
  "rgba(140, 90, 190, 0.45)",
  "rgba(40, 170, 170, 0.45)",
];

function regionColor(name: string, index: number): string {
  return REGION_COLORS[name] ?? PALETTE[index % PALETTE.length]!;
}

export class MapRenderer {
  private readonly ctx: CanvasRenderingContext2D;

  constructor(private readonly canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
  }

  draw(env: EnvironmentView, deployment: Deployment | null): void {
    const { ctx, canvas } = this;
    const [x0, y0, x1, y1] = env.bounds;
    const pad = 12;
    const scale = Math.min(
      (canvas.width - 2 * pad) / (x1 - x0),
      (canvas.height - 2 * pad) / (y1 - y0),
    );
    // y flips so world "up" is screen "up"
    const toX = (x: number) => pad + (x - x0) * scale;
    const toY = (y: number) => canvas.height - pad - (y - y0) * scale;

    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.fillStyle = "#fafaf7";
    ctx.fillRect(toX(x0), toY(y1), (x1 - x0) * scale, (y1 - y0) * scale);
    ctx.strokeStyle = "#555";
    ctx.strokeRect(toX(x0), toY(y1), (x1 - x0) * scale, (y1 - y0) * scale);

    Object.entries(env.regions).forEach(([name, polygons], index) => {
      ctx.fillStyle = regionColor(name, index);
      for (const polygon of polygons) {
        ctx.beginPath();
        polygon.forEach(([px, py], i) =>
          i === 0 ? ctx.moveTo(toX(px), toY(py)) : ctx.lineTo(toX(px), toY(py)),
        );
        ctx.closePath();
        ctx.fill();
        const [lx, ly] = polygon[0]!;
        ctx.fillStyle = "#333";
        ctx.font = "12px sans-serif";
        ctx.fillText(name, toX(lx) + 3, toY(ly) - 3);
        ctx.fillStyle = regionColor(name, index);
      }
    });

    if (!deployment) return;

    if (deployment.trajectory.length > 1) {
      ctx.beginPath();
      deployment.trajectory.forEach(([px, py], i) =>
        i === 0 ? ctx.moveTo(toX(px), toY(py)) : ctx.lineTo(toX(px), toY(py)),
      );
      ctx.strokeStyle = "#1d3557";
      ctx.lineWidth = 2;
      ctx.stroke();
      ctx.lineWidth = 1;
    }

    const [vx, vy, theta] = deployment.pose;
    if (deployment.disc_radius > 0) {
      ctx.beginPath();
      ctx.arc(toX(vx), toY(vy), deployment.disc_radius * scale, 0, 2 * Math.PI);
      ctx.fillStyle = "rgba(29, 53, 87, 0.15)";
      ctx.fill();
      ctx.strokeStyle = "rgba(29, 53, 87, 0.6)";
      ctx.stroke();
    }
    // heading arrow
    const tip = 0.4;
    ctx.beginPath();
    ctx.moveTo(toX(vx), toY(vy));
    ctx.lineTo(toX(vx + tip * Math.cos(theta)), toY(vy + tip * Math.sin(theta)));
    ctx.strokeStyle = "#e63946";
    ctx.lineWidth = 2;
    ctx.stroke();
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.arc(toX(vx), toY(vy), 3, 0, 2 * Math.PI);
    ctx.fillStyle = "#e63946";
    ctx.fill();
  }
}
