import { RatingClient } from './api';
import { Workbench } from './app';

// Entry point for the browser shell: ?api=<base>&rater=<id>&seed=<n>&token=<t>
const mount = document.getElementById('app');
if (mount) {
  const params = new URLSearchParams(window.location.search);
  const base = params.get('api') ?? 'http://127.0.0.1:8000';
  const rater = params.get('rater') ?? 'anonymous';
  const seed = Number(params.get('seed') ?? '0');
  const token = params.get('token') ?? undefined;

  const client = new RatingClient(base, { token });
  const bench = new Workbench(mount, client);
  bench.start(rater, seed).catch((err) => {
    mount.textContent = `Could not start session: ${err}`;
  });
}
