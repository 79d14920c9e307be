from sqlalchemy.orm import sessionmaker

from src.conf.config import settings
from src.routes import simulations

SMALL_KERNEL = {'source': 'analytic', 'pitch': 20.0, 'half_width': 1500.0}
THRESHOLDS = {'mma_clearing': 100.0, 'pmma_clearing': 350.0, 'pmma_collapse': 1000.0}


def test_root(client):
    response = client.get('/')
    assert response.status_code == 200, response.text
    assert response.json()['message'] == 'E-beam lithography dose simulation API'


def test_create_dosemap(client):
    response = client.post('/api/dosemaps/',
                           json={'geometry': 'thin-dolan', 'kernel': SMALL_KERNEL})
    assert response.status_code == 200, response.text
    data = response.json()
    assert data['geometry'] == 'thin-dolan'
    assert data['grid'] == [500, 500]
    assert data['metrics']['edge_ratio'] > 1.0
    assert 'exposed_area_1000nm' in data['metrics']


def test_dosemap_recorded(client):
    response = client.get('/api/runs/', params={'command': 'dosemap'})
    assert response.status_code == 200, response.text
    runs = response.json()
    assert len(runs) == 1
    assert runs[0]['status'] == 'done'
    assert runs[0]['summary']['geometry'] == 'thin-dolan'


def test_dosemap_without_kernel_directory(client):
    response = client.post('/api/dosemaps/', json={'kernel': {'source': 'directory'}})
    assert response.status_code == 400, response.text
    assert 'kernel directory' in response.json()['detail']


def test_dosemap_unknown_geometry(client):
    response = client.post('/api/dosemaps/', json={'geometry': 'triangle'})
    assert response.status_code == 422, response.text


def test_create_pec(client):
    response = client.post('/api/pec/', json={'geometry': 'thin-dolan', 'kernel': SMALL_KERNEL,
                                             'max_iter': 10})
    assert response.status_code == 200, response.text
    data = response.json()
    assert set(data['factors']) == {'lower_finger', 'lower_lead', 'upper_finger', 'upper_lead'}
    assert 1 <= data['iterations'] <= 10
    assert data['gap_dose'] > 0


def test_create_sweep(client):
    response = client.post('/api/sweeps/', json={
        'geometries': ['horseshoe', 'thin-dolan'], 'kernel': SMALL_KERNEL,
        'thresholds': THRESHOLDS,
    })
    assert response.status_code == 200, response.text
    data = response.json()
    assert data['thresholds'] == THRESHOLDS
    assert [r['geometry'] for r in data['results']] == ['horseshoe', 'thin-dolan']
    for result in data['results']:
        assert len(result['doses']) == 27
        assert set(result['states']) <= {'no-bridge', 'formed', 'collapsed'}


def test_sweep_empty_range(client):
    response = client.post('/api/sweeps/', json={'kernel': SMALL_KERNEL, 'thresholds': THRESHOLDS,
                                                'start': 800, 'stop': 400})
    assert response.status_code == 400, response.text
    assert 'empty dose range' in response.json()['detail']


def test_create_simulation(client, monkeypatch, tmp_path):
    monkeypatch.setattr(settings, 'output_dir', str(tmp_path))
    body = {
        'stack': {
            'substrate': {'material': 'Si'},
            'beam': {'energy': 5, 'beam_radius': 0, 'trajectory_count': 20, 'seed': 1},
        },
        'threads': 1,
    }
    response = client.post('/api/simulations/', json=body)
    assert response.status_code == 202, response.text
    data = response.json()
    assert data['status'] == 'queued'
    assert data['seed'] == 1

    response = client.get(f'/api/runs/{data["id"]}')
    assert response.status_code == 200, response.text
    run = response.json()
    assert run['status'] == 'done', run['error']
    assert run['summary']['summary']['trajectory_count'] == 20
    assert (tmp_path / f'run-{data["id"]}' / 'events.bin').exists()


def test_simulation_rejects_unknown_material(client):
    body = {'stack': {'substrate': {'material': 'Unobtainium'},
                      'beam': {'energy': 5, 'trajectory_count': 20}}}
    response = client.post('/api/simulations/', json=body)
    assert response.status_code == 422, response.text


def test_simulation_task_uses_own_session(client, session, monkeypatch, tmp_path):
    monkeypatch.setattr(settings, 'output_dir', str(tmp_path))
    factory = sessionmaker(autocommit=False, autoflush=False, bind=session.get_bind())
    opened = []

    def registry_session():
        db = factory()
        opened.append(db)
        return db

    monkeypatch.setattr(simulations, 'RegistrySession', registry_session)
    body = {
        'stack': {
            'substrate': {'material': 'Si'},
            'beam': {'energy': 5, 'beam_radius': 0, 'trajectory_count': 10, 'seed': 2},
        },
        'threads': 1,
    }
    response = client.post('/api/simulations/', json=body)
    assert response.status_code == 202, response.text
    assert len(opened) == 1
    assert not opened[0].in_transaction()

    run = client.get(f'/api/runs/{response.json()["id"]}').json()
    assert run['status'] == 'done', run['error']


def test_simulation_rejects_seed_beyond_registry_range(client):
    body = {'stack': {'substrate': {'material': 'Si'},
                      'beam': {'energy': 5, 'trajectory_count': 20, 'seed': 2 ** 63}}}
    response = client.post('/api/simulations/', json=body)
    assert response.status_code == 422, response.text
    assert client.get('/api/runs/').status_code == 200
